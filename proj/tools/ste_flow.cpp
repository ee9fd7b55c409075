#include <string>
#include <vector>

#include "steflow/cli.hpp"

int main(int argc, char** argv) {
  return steflow::dispatch(std::vector<std::string>(argv, argv + argc));
}
