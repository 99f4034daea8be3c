#include <cstdio>

int main() {
    std::fprintf(stderr, "uld: command-line interface not wired up yet\n");
    return 1;
}
