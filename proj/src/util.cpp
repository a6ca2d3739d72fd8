#include "gfnlab/util.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

namespace gfn {

std::string SpecString::get(const std::string& key, const std::string& fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

static double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double x = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return x;
    } catch (const std::exception&) {
        throw ValidationError("parameter '" + key + "': expected a number, got '" + value + "'");
    }
}

static long long to_int(const std::string& key, const std::string& value) {
    long long out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ValidationError("parameter '" + key + "': expected an integer, got '" + value + "'");
    return out;
}

double SpecString::get_double(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : to_double(key, it->second);
}

long long SpecString::get_int(const std::string& key, long long fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : to_int(key, it->second);
}

double SpecString::require_double(const std::string& key) const {
    if (!has(key)) throw ValidationError("'" + kind + "' requires parameter '" + key + "'");
    return get_double(key, 0.0);
}

long long SpecString::require_int(const std::string& key) const {
    if (!has(key)) throw ValidationError("'" + kind + "' requires parameter '" + key + "'");
    return get_int(key, 0);
}

void SpecString::allow_only(std::initializer_list<const char*> keys) const {
    for (const auto& [k, v] : params) {
        bool ok = std::any_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; });
        if (!ok) throw ValidationError("'" + kind + "' does not take parameter '" + k + "'");
    }
}

SpecString parse_spec(const std::string& text) {
    SpecString out;
    auto colon = text.find(':');
    out.kind = text.substr(0, colon);
    if (out.kind.empty()) throw ValidationError("empty spec string");
    if (colon == std::string::npos) return out;
    std::string rest = text.substr(colon + 1);
    // file:path keeps the remainder verbatim
    if (out.kind == "file") {
        out.params["path"] = rest;
        return out;
    }
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ValidationError("malformed parameter '" + item + "' in '" + text + "'");
        out.params[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return out;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t sub) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(sub), static_cast<std::uint32_t>(sub >> 32)};
    return std::mt19937_64(seq);
}

double log_sum_exp(const std::vector<double>& v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        out << contents;
        out.flush();
        if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot rename into '" + path + "': " + ec.message());
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_full(double x) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

std::string format_fixed(double x, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
    return buf;
}

}  // namespace gfn
