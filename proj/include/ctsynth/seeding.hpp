#ifndef CTSYNTH_SEEDING_HPP
#define CTSYNTH_SEEDING_HPP

#include <cstdint>
#include <initializer_list>

namespace ctsynth {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Stateless child seed from a root seed and a path of integers (sample id, epoch, ...).
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path) {
    uint64_t h = splitmix64(root);
    for (uint64_t p : path) h = splitmix64(h ^ splitmix64(p));
    return h;
}

inline uint64_t derive_seed(uint64_t root, uint64_t a) { return derive_seed(root, {a}); }
inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b) { return derive_seed(root, {a, b}); }

}  // namespace ctsynth

#endif
