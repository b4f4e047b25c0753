#pragma once

#include <cstdio>
#include <string>

namespace metareg::detail {

// Decimal with 17 significant digits: enough to reproduce any double
// bit-exactly on parse.
inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace metareg::detail
