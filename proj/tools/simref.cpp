#include <string>
#include <vector>

#include "simref/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return simref::run_cli(args);
}
