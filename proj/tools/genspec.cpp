#include <iostream>
#include <string>
#include <vector>

#include "genspec/cli.hpp"

int main(int argc, char** argv) {
  return genspec::dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
