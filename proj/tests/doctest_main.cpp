#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Same allocator setup as the CLI: tensor buffers stay on the free lists
  // instead of cycling through mmap, which also keeps timings comparable.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
#endif
  return doctest::Context(argc, argv).run();
}
