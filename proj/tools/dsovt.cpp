#include <string>
#include <vector>

#include "dsovt/cli.hpp"

int main(int argc, char** argv) { return dsovt::run_cli(std::vector<std::string>(argv, argv + argc)); }
