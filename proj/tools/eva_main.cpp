#include <exception>
#include <iostream>

#include "eva/cli.hpp"
#include "eva/trainer.hpp"

int main(int argc, char** argv) {
    try {
        return eva::cli::run(argc, argv);
    } catch (const eva::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
