#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sac {

// All randomness in the artifact flows from one master seed, fanned out into
// named sub-streams (data, init, selection, ...) so components can be
// reproduced independently.
uint64_t sub_seed(uint64_t master, std::string_view stream);

// Deterministic RNG wrapper. std::mt19937_64 has a fixed algorithm, but the
// standard distributions are implementation-defined, so sampling is done by
// hand here to keep runs bit-identical across toolchains.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n);

    int range(int lo, int hi_inclusive); // uniform in [lo, hi]

    double uniform01(); // [0, 1)

    double normal(double mean = 0.0, double stddev = 1.0); // Box-Muller

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [0, n), in selection order (unsorted).
    std::vector<int> sample_without_replacement(int n, int k);

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace sac
