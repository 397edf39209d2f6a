#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mcc/errors.hpp"

namespace mcc {

inline std::string fmt_g(double v, int sig = 9) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", sig, v);
    return buf;
}

// Full-precision form that round-trips doubles exactly.
inline std::string fmt_exact(double v) { return fmt_g(v, 17); }

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                                      bool skip_header) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read csv: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first && skip_header) {
            first = false;
            continue;
        }
        first = false;
        if (line.empty()) continue;
        rows.push_back(split_csv(line));
    }
    return rows;
}

}  // namespace mcc
