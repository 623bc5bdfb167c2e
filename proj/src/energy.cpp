#include "dsr/energy.hpp"

namespace dsr {

double cramer_distance_oracle(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw UsageError("cramer_distance_oracle: empty sample");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());

    // Sweep the merged breakpoints; both CDFs are constant between them.
    std::size_t ia = 0, ib = 0;
    double total = 0;
    double prev = std::min(sa.front(), sb.front());
    while (ia < sa.size() || ib < sb.size()) {
        const double next = (ib >= sb.size() || (ia < sa.size() && sa[ia] <= sb[ib])) ? sa[ia] : sb[ib];
        const double diff = static_cast<double>(ia) / na - static_cast<double>(ib) / nb;
        total += diff * diff * (next - prev);
        while (ia < sa.size() && sa[ia] == next) ++ia;
        while (ib < sb.size() && sb[ib] == next) ++ib;
        prev = next;
    }
    return total;
}

}  // namespace dsr
