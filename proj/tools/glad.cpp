#include <string>
#include <vector>

#include "glad/cli.hpp"

int main(int argc, char** argv) {
  return glad::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
