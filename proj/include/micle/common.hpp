#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace micle {

// Error taxonomy, mapped to CLI exit codes: usage=1, validation=2, numeric=3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : ValidationError {
    using ValidationError::ValidationError;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// A metric that is mathematically undefined on the given input (e.g. AUC with
// a single class present).
struct UndefinedMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void check_dim(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

}  // namespace micle
