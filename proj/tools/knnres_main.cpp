#include "knnres_cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return knnres::cli::run(std::move(args));
}
