#pragma once

#include <set>
#include <string>
#include <vector>

namespace sgl {

// A K-factor label. Comparisons are lexicographic, so std::set gives a
// deterministic iteration order independent of insertion history.
using LabelTuple = std::vector<int>;
using TupleSet = std::set<LabelTuple>;

inline std::string tuple_to_string(const LabelTuple& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t[i]);
    }
    return s + ")";
}

inline LabelTuple one_hot_tuple(int arity, int hot) {
    LabelTuple t(static_cast<std::size_t>(arity), 0);
    t[static_cast<std::size_t>(hot)] = 1;
    return t;
}

// Index of the single 1 in a {0,1} tuple, or -1 if the tuple is not one-hot.
inline int hot_index(const LabelTuple& t) {
    int hot = -1;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == 0) continue;
        if (t[i] != 1 || hot >= 0) return -1;
        hot = static_cast<int>(i);
    }
    return hot;
}

} // namespace sgl
