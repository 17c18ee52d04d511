#include <string>
#include <vector>

#include "sasforge/cli.hpp"

int main(int argc, char** argv) {
    return sasforge::cli::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
