#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Activations of a few MB are allocated and freed every step; keep them on
  // the heap instead of paying an mmap/munmap round trip each time.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return sgdet::cli::dispatch(argc, argv, std::cout, std::cerr);
}
