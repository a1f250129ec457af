#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flc/tensor.hpp"

namespace flc {

enum class Split : std::uint8_t { Train, Val, Test };

/// Labelled images in [0, 1], each tagged with the split it belongs to.
template <class T>
struct Dataset {
  Tensor<T> images;  ///< [N, C, H, W]
  std::vector<int> labels;
  std::vector<Split> splits;
  std::size_t classes = 0;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  /// Throws if labels, split tags, or pixel range violate the dataset invariants.
  void validate(double lo = 0.0, double hi = 1.0) const {
    if (images.n() != labels.size() || splits.size() != labels.size()) {
      throw std::invalid_argument("dataset: images/labels/splits count mismatch");
    }
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= classes) {
        throw std::invalid_argument("dataset: label " + std::to_string(l) + " out of range");
      }
    }
    for (T v : images.data()) {
      if (!(v >= lo && v <= hi)) throw std::invalid_argument("dataset: pixel outside clamp range");
    }
  }

  Dataset select(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.images = images.gather(rows);
    out.classes = classes;
    out.provenance = provenance;
    for (std::size_t r : rows) {
      out.labels.push_back(labels[r]);
      out.splits.push_back(splits[r]);
    }
    return out;
  }

  Dataset subset(Split s) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < size(); ++i) {
      if (splits[i] == s) rows.push_back(i);
    }
    return select(rows);
  }

  /// First `count` examples (or all, if fewer).
  Dataset head(std::size_t count) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < std::min(count, size()); ++i) rows.push_back(i);
    return select(rows);
  }
};

template <class To, class From>
Dataset<To> cast_dataset(const Dataset<From>& d) {
  return Dataset<To>{cast<To>(d.images), d.labels, d.splits, d.classes, d.provenance};
}

template <class T>
Dataset<T> concat(const Dataset<T>& a, const Dataset<T>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.images.c() != b.images.c() || a.images.h() != b.images.h() || a.images.w() != b.images.w()) {
    throw std::invalid_argument("concat: image shapes differ");
  }
  std::vector<T> data(a.images.vec());
  data.insert(data.end(), b.images.vec().begin(), b.images.vec().end());
  Dataset<T> out;
  out.images = Tensor<T>({a.size() + b.size(), a.images.c(), a.images.h(), a.images.w()}, std::move(data));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.splits = a.splits;
  out.splits.insert(out.splits.end(), b.splits.begin(), b.splits.end());
  out.classes = std::max(a.classes, b.classes);
  out.provenance = a.provenance;
  return out;
}

}  // namespace flc
