#include <cstdio>

int main() {
    std::puts("tanszoo: not wired up yet");
    return 1;
}
