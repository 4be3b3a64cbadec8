#include "powerlink/csr.hpp"

#include <algorithm>
#include <cassert>

namespace powerlink {

std::optional<std::size_t> CsrPattern::find(std::size_t r, std::size_t c) const {
  if (r >= rows) return std::nullopt;
  auto first = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r]);
  auto last = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r + 1]);
  auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(c));
  if (it == last || *it != c) return std::nullopt;
  return static_cast<std::size_t>(it - col_idx.begin());
}

CsrPattern CsrPattern::from_pairs(std::size_t rows, std::size_t cols,
                                  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs) {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  CsrPattern p;
  p.rows = rows;
  p.cols = cols;
  p.row_ptr.assign(rows + 1, 0);
  p.col_idx.reserve(pairs.size());
  for (const auto& [r, c] : pairs) {
    assert(r < rows && c < cols);
    ++p.row_ptr[r + 1];
    p.col_idx.push_back(c);
  }
  for (std::size_t r = 0; r < rows; ++r) p.row_ptr[r + 1] += p.row_ptr[r];
  return p;
}

std::vector<std::uint32_t> CsrPattern::row_of_entries() const {
  std::vector<std::uint32_t> out(nnz());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) out[p] = static_cast<std::uint32_t>(r);
  return out;
}

void row_times_csr(std::span<const double> u, const CsrPattern& m,
                   std::span<const double> values, std::span<double> out) {
  assert(u.size() == m.rows && out.size() == m.cols && values.size() == m.nnz());
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double ui = u[i];
    if (ui == 0.0) continue;
    for (std::size_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) out[m.col_idx[p]] += ui * values[p];
  }
}

}  // namespace powerlink
