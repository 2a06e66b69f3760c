#include "dcl4kt/cli.hpp"

#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training allocates many short-lived multi-megabyte matrices; keep them on
  // the heap instead of mapping fresh pages for each one.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return dcl4kt::run_cli(args, std::cout, std::cerr);
}
