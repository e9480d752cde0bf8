#pragma once
#include <stdexcept>
#include <string>

namespace twinlab {

/* precondition / invariant guard; message should name the offending quantity */
inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void check_runtime(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

} // namespace twinlab
