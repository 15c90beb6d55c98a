#pragma once

#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "insmix/dataset.hpp"
#include "insmix/rng.hpp"

namespace insmix {

struct TemplateFilter {
  long area_min = 1;
  long area_max = std::numeric_limits<long>::max();
  std::optional<std::string> exclude_source;

  bool accepts(const Instance& ins) const {
    if (ins.area < area_min || ins.area > area_max) return false;
    if (exclude_source && ins.source_id == *exclude_source) return false;
    return true;
  }
};

// Pool of all training-set instances, used as paste templates.
class InstanceBank {
 public:
  static InstanceBank build(const std::vector<LabeledImage>& dataset) {
    InstanceBank bank;
    for (const auto& img : dataset) {
      auto ins = extract_instances(img);
      bank.entries_.insert(bank.entries_.end(), std::make_move_iterator(ins.begin()),
                           std::make_move_iterator(ins.end()));
    }
    if (bank.entries_.empty()) throw Error("instance bank: dataset contains no instances");
    bank.area_index_.resize(bank.entries_.size());
    std::iota(bank.area_index_.begin(), bank.area_index_.end(), std::size_t{0});
    std::stable_sort(bank.area_index_.begin(), bank.area_index_.end(),
                     [&](std::size_t a, std::size_t b) { return bank.entries_[a].area < bank.entries_[b].area; });
    return bank;
  }

  const std::vector<Instance>& entries() const { return entries_; }
  const std::vector<std::size_t>& area_index() const { return area_index_; }
  std::size_t size() const { return entries_.size(); }

  // Uniform over qualifying entries; deterministic given the rng state.
  const Instance& sample_template(const TemplateFilter& filter, Rng& rng) const {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (filter.accepts(entries_[i])) candidates.push_back(i);
    if (candidates.empty()) throw Error("instance bank: no entry satisfies the template filter");
    return entries_[candidates[rng.index(candidates.size())]];
  }

 private:
  std::vector<Instance> entries_;
  std::vector<std::size_t> area_index_;  // permutation sorted by area
};

}  // namespace insmix
