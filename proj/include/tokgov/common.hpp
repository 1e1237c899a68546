#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokgov {

// Error taxonomy. The CLI maps these onto exit codes: config errors exit 2,
// input/data errors exit 3, anything else exit 4.
struct IOError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ParseError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IntegrityError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };
struct InputError : std::runtime_error { using std::runtime_error::runtime_error; };

// 64-bit FNV-1a. Content digests for reproducibility checks, not security.
class Digest {
public:
    void update(const void* data, size_t n);
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::string hex() const;
    uint64_t value() const { return h_; }

private:
    uint64_t h_ = 1469598103934665603ULL;
};

std::string digest_string(const std::string& bytes);
std::string digest_file(const std::string& path);

// splitmix64 generator. Portable and stable across platforms, unlike the
// standard <random> distributions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();                        // Box-Muller, mean 0 std 1
    int uniform_int(int lo, int hi);        // inclusive bounds

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), ascending.
    std::vector<int> sample_without_replacement(int n, int k);

private:
    uint64_t state_;
};

// Derives a per-sample seed so worker count never changes outputs.
uint64_t fold_seed(uint64_t seed, const std::string& key);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
// Writes to a temp file in the same directory, then renames.
void write_file_atomic(const std::string& path, const std::string& bytes);
void append_line(const std::string& path, const std::string& line);

std::string to_lower(std::string s);
std::string trim(const std::string& s);
std::vector<std::string> split_ws(const std::string& s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

double now_seconds();

// Runs fn(i) for i in [0, n). workers <= 1 runs inline. Results must not
// depend on scheduling; callers key any randomness on per-item seeds.
void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn);

}  // namespace tokgov
