#include "create/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "create/errors.hpp"

namespace create {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError(path, "truncated checkpoint");
  return v;
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(path, "cannot open for writing");
  os.write("CRTK", 4);
  write_raw<std::uint32_t>(os, kVersion);
  write_raw<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) write_raw<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!os) throw FormatError(path, "write failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path, "cannot open for reading");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CRTK", 4) != 0)
    throw FormatError(path, "not a checkpoint file (bad magic)");
  auto version = read_raw<std::uint32_t>(is, path);
  if (version != kVersion)
    throw FormatError(path, "unsupported checkpoint version " + std::to_string(version) +
                                " (expected " + std::to_string(kVersion) + ")");
  auto count = read_raw<std::uint64_t>(is, path);
  Checkpoint ckpt;
  for (std::uint64_t k = 0; k < count; ++k) {
    auto name_len = read_raw<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError(path, "truncated checkpoint");
    auto rank = read_raw<std::uint32_t>(is, path);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(read_raw<std::uint64_t>(is, path));
      numel *= d;
    }
    std::vector<double> data(numel);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!is) throw FormatError(path, "truncated checkpoint");
    ckpt.tensors[name] = Tensor(std::move(shape), std::move(data));
  }
  return ckpt;
}

}  // namespace create
