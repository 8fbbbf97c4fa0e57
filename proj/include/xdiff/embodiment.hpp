#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace xdiff {

template <typename Scalar>
using ActionChunkT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// H x D matrix of unified-space actions, one row per horizon step.
using ActionChunk = ActionChunkT<double>;

using PaddingMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct WindowRange {
  int begin = 0;
  int width = 0;
  std::string name;

  int end() const { return begin + width; }
};

/// Partition of the unified action space into contiguous functional windows,
/// ordered base to end-effector.
class UnifiedActionLayout {
 public:
  explicit UnifiedActionLayout(std::vector<int> widths,
                               std::vector<std::string> names = {});

  /// D = 12 over [base(4), wrist(2), fingers-proximal(3), fingers-distal(3)].
  static UnifiedActionLayout reference();

  int total_dim() const { return total_dim_; }
  int window_count() const { return static_cast<int>(windows_.size()); }
  const WindowRange& window(int w) const { return windows_.at(w); }
  const std::vector<WindowRange>& windows() const { return windows_; }
  std::vector<int> widths() const;
  int window_of(int dim) const;

  std::uint64_t hash() const;

  friend bool operator==(const UnifiedActionLayout& a,
                         const UnifiedActionLayout& b) {
    return a.widths() == b.widths();
  }

 private:
  std::vector<WindowRange> windows_;
  std::vector<int> dim_to_window_;
  int total_dim_ = 0;
};

struct EmbodimentSpec {
  int id = 0;
  std::string name;
  std::vector<int> active_dims;  // leading used dims per window
  double sigma_e = 1.0;
  double reach_radius = 0.6;

  int total_active() const;
};

/// Throws std::invalid_argument when `spec` does not fit `layout`.
void validate(const EmbodimentSpec& spec, const UnifiedActionLayout& layout);

PaddingMask padding_mask(const EmbodimentSpec& spec,
                         const UnifiedActionLayout& layout);

/// gripper, hand4, hand5 for the reference layout.
std::vector<EmbodimentSpec> builtin_embodiments();

class EmbodimentRegistry {
 public:
  explicit EmbodimentRegistry(UnifiedActionLayout layout)
      : layout_(std::move(layout)) {}

  /// Returns the registration handle (insertion index).
  int register_embodiment(const EmbodimentSpec& spec);

  const EmbodimentSpec& at(int id) const;
  bool contains(int id) const { return index_.count(id) != 0; }
  const std::vector<EmbodimentSpec>& specs() const { return specs_; }
  int size() const { return static_cast<int>(specs_.size()); }
  /// Row of `id` in one-hot and soft-prompt tables.
  int slot(int id) const;
  const UnifiedActionLayout& layout() const { return layout_; }

 private:
  UnifiedActionLayout layout_;
  std::vector<EmbodimentSpec> specs_;
  std::map<int, int> index_;
};

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> pad_to_unified(
    const Eigen::MatrixBase<Derived>& raw, const EmbodimentSpec& spec,
    const UnifiedActionLayout& layout) {
  if (raw.size() != spec.total_active())
    throw std::invalid_argument("pad_to_unified: expected " +
                                std::to_string(spec.total_active()) +
                                " native dims, got " +
                                std::to_string(raw.size()));
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> out =
      Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>::Zero(
          layout.total_dim());
  Eigen::Index src = 0;
  for (int w = 0; w < layout.window_count(); ++w) {
    const int n = spec.active_dims[w];
    out.segment(layout.window(w).begin, n) = raw.derived().reshaped().segment(src, n);
    src += n;
  }
  return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> project_to_native(
    const Eigen::MatrixBase<Derived>& unified, const EmbodimentSpec& spec,
    const UnifiedActionLayout& layout) {
  if (unified.size() != layout.total_dim())
    throw std::invalid_argument("project_to_native: expected " +
                                std::to_string(layout.total_dim()) +
                                " unified dims, got " +
                                std::to_string(unified.size()));
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> out(
      spec.total_active());
  Eigen::Index dst = 0;
  for (int w = 0; w < layout.window_count(); ++w) {
    const int n = spec.active_dims[w];
    out.segment(dst, n) =
        unified.derived().reshaped().segment(layout.window(w).begin, n);
    dst += n;
  }
  return out;
}

/// Zeroes every padded column of a chunk in place.
void apply_padding(ActionChunk& chunk, const EmbodimentSpec& spec,
                   const UnifiedActionLayout& layout);

}  // namespace xdiff
