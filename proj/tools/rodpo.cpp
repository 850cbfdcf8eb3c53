#include <iostream>

#include "rodpo/cli/app.hpp"

int main(int argc, char** argv) {
  return rodpo::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
