#include "gttt/cli.hpp"

int main(int argc, char** argv) {
    return gttt::cli::run_cli({argv + 1, argv + argc});
}
