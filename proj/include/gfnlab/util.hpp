#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfn {

// Raised for malformed user input (bad spec strings, out-of-range parameters).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// "kind:key=value,key=value" split into its parts.
struct SpecString {
    std::string kind;
    std::map<std::string, std::string> params;

    bool has(const std::string& key) const { return params.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    double require_double(const std::string& key) const;
    long long require_int(const std::string& key) const;
    // Throws if any key is outside the allowed list.
    void allow_only(std::initializer_list<const char*> keys) const;
};

SpecString parse_spec(const std::string& text);

// Independent stream for substream index `stream` of a run seeded with `seed`.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t sub = 0);

double log_sum_exp(const std::vector<double>& v);

// Write through a temporary sibling file and rename into place.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

// Shortest round-trip representation.
std::string format_full(double x);
std::string format_fixed(double x, int decimals = 6);

}  // namespace gfn
