#include <cstdio>

int main() {
  std::printf("ccomp: cli pending\n");
  return 1;
}
