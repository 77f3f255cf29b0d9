#include "sac/rng.hpp"

#include "sac/error.hpp"

#include <unordered_map>

namespace sac {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace

uint64_t sub_seed(uint64_t master, std::string_view stream) {
    return splitmix64(master ^ splitmix64(fnv1a(stream)));
}

uint64_t Rng::below(uint64_t n) {
    require(n > 0, ErrKind::contract, "Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return x % n;
}

int Rng::range(int lo, int hi_inclusive) {
    require(lo <= hi_inclusive, ErrKind::contract, "Rng::range: empty interval");
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo) + 1));
}

double Rng::uniform01() {
    // 53-bit mantissa construction
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + spare_ * stddev;
    }
    double u = 1.0 - uniform01(); // (0, 1]
    double v = uniform01();
    double r = std::sqrt(-2.0 * std::log(u));
    double a = 2.0 * M_PI * v;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + r * std::cos(a) * stddev;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    require(k >= 0 && k <= n, ErrKind::contract, "sample_without_replacement: k out of range");
    // Partial Fisher-Yates over an index pool.
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

} // namespace sac
