#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace powerlink {

/// Compressed-row sparsity pattern of a boolean matrix. Column indices are
/// sorted and unique within each row.
struct CsrPattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;

  std::size_t nnz() const noexcept { return col_idx.size(); }

  std::span<const std::uint32_t> row(std::size_t r) const {
    return {col_idx.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }

  /// Position of entry (r, c) in col_idx, if present.
  std::optional<std::size_t> find(std::size_t r, std::size_t c) const;

  /// Builds a pattern from (row, col) pairs; duplicates are merged.
  static CsrPattern from_pairs(std::size_t rows, std::size_t cols,
                               std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs);

  /// Row index of every stored entry, in storage order.
  std::vector<std::uint32_t> row_of_entries() const;

  bool operator==(const CsrPattern&) const = default;
};

/// out = u * M where M has pattern `m` and per-entry `values`. Accumulates
/// in row-major storage order so the result is reproducible bit for bit.
void row_times_csr(std::span<const double> u, const CsrPattern& m,
                   std::span<const double> values, std::span<double> out);

}  // namespace powerlink
