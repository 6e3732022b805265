#include <vector>

#include "create/cli.hpp"

int main(int argc, char** argv) {
  return create::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
