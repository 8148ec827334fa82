#include <string>
#include <vector>

#include "msfm/cli.hpp"

int main(int argc, char** argv) {
  return msfm::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
