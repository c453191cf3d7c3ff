#include "cadenza/rote.hpp"

namespace cadenza::rote {

std::vector<double> timestamps_from_stride(int n, double stride) {
    if (stride <= 0.0) throw InvalidArgument("stride must be positive");
    std::vector<double> taus(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i) taus[static_cast<std::size_t>(i)] = i * stride;
    return taus;
}

} // namespace cadenza::rote
