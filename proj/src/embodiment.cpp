#include "xdiff/embodiment.hpp"

#include <numeric>

#include "xdiff/rng.hpp"

namespace xdiff {

UnifiedActionLayout::UnifiedActionLayout(std::vector<int> widths,
                                         std::vector<std::string> names) {
  if (widths.empty())
    throw std::invalid_argument("layout needs at least one window");
  if (!names.empty() && names.size() != widths.size())
    throw std::invalid_argument("layout window names/widths length mismatch");
  int begin = 0;
  for (std::size_t w = 0; w < widths.size(); ++w) {
    if (widths[w] <= 0)
      throw std::invalid_argument("layout window widths must be positive");
    std::string name =
        names.empty() ? "w" + std::to_string(w) : std::move(names[w]);
    windows_.push_back({begin, widths[w], std::move(name)});
    for (int i = 0; i < widths[w]; ++i)
      dim_to_window_.push_back(static_cast<int>(w));
    begin += widths[w];
  }
  total_dim_ = begin;
}

UnifiedActionLayout UnifiedActionLayout::reference() {
  return UnifiedActionLayout(
      {4, 2, 3, 3}, {"base", "wrist", "fingers-proximal", "fingers-distal"});
}

std::vector<int> UnifiedActionLayout::widths() const {
  std::vector<int> out;
  out.reserve(windows_.size());
  for (const auto& w : windows_) out.push_back(w.width);
  return out;
}

int UnifiedActionLayout::window_of(int dim) const {
  return dim_to_window_.at(dim);
}

std::uint64_t UnifiedActionLayout::hash() const {
  std::uint64_t h = fnv1a64("layout");
  for (const auto& w : windows_) {
    const std::string token = std::to_string(w.width) + ":" + w.name + ";";
    h = fnv1a64(token, h);
  }
  return h;
}

int EmbodimentSpec::total_active() const {
  return std::accumulate(active_dims.begin(), active_dims.end(), 0);
}

void validate(const EmbodimentSpec& spec, const UnifiedActionLayout& layout) {
  const std::string who = "embodiment '" + spec.name + "': ";
  if (static_cast<int>(spec.active_dims.size()) != layout.window_count())
    throw std::invalid_argument(who + "active_dims has " +
                                std::to_string(spec.active_dims.size()) +
                                " entries for " +
                                std::to_string(layout.window_count()) +
                                " windows");
  for (int w = 0; w < layout.window_count(); ++w) {
    const int n = spec.active_dims[w];
    if (n < 0 || n > layout.window(w).width)
      throw std::invalid_argument(
          who + "active_dims[" + std::to_string(w) + "] = " +
          std::to_string(n) + " overflows window width " +
          std::to_string(layout.window(w).width));
  }
  if (!(spec.sigma_e > 0.0)) throw std::invalid_argument(who + "sigma_e must be > 0");
  if (!(spec.reach_radius > 0.0))
    throw std::invalid_argument(who + "reach_radius must be > 0");
  if (spec.total_active() < 1)
    throw std::invalid_argument(who + "no active dimensions");
}

PaddingMask padding_mask(const EmbodimentSpec& spec,
                         const UnifiedActionLayout& layout) {
  validate(spec, layout);
  PaddingMask mask = PaddingMask::Constant(layout.total_dim(), false);
  for (int w = 0; w < layout.window_count(); ++w)
    mask.segment(layout.window(w).begin, spec.active_dims[w]).setConstant(true);
  return mask;
}

std::vector<EmbodimentSpec> builtin_embodiments() {
  return {
      {0, "gripper", {4, 2, 1, 0}, 1.0, 0.60},
      {1, "hand4", {4, 2, 3, 1}, 0.9, 0.55},
      {2, "hand5", {4, 2, 3, 2}, 0.8, 0.50},
  };
}

int EmbodimentRegistry::register_embodiment(const EmbodimentSpec& spec) {
  validate(spec, layout_);
  if (index_.count(spec.id))
    throw std::invalid_argument("duplicate embodiment id " +
                                std::to_string(spec.id));
  const int handle = static_cast<int>(specs_.size());
  specs_.push_back(spec);
  index_.emplace(spec.id, handle);
  return handle;
}

const EmbodimentSpec& EmbodimentRegistry::at(int id) const {
  return specs_.at(slot(id));
}

int EmbodimentRegistry::slot(int id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw std::out_of_range("unknown embodiment id " + std::to_string(id));
  return it->second;
}

void apply_padding(ActionChunk& chunk, const EmbodimentSpec& spec,
                   const UnifiedActionLayout& layout) {
  for (int w = 0; w < layout.window_count(); ++w) {
    const auto& win = layout.window(w);
    const int n = spec.active_dims[w];
    chunk.middleCols(win.begin + n, win.width - n).setZero();
  }
}

}  // namespace xdiff
