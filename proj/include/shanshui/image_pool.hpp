#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "shanshui/random.hpp"
#include "shanshui/tensor.hpp"

namespace shanshui::nn {

// History of generated images replayed to the discriminators.
template <typename Scalar>
class ImagePool {
 public:
  explicit ImagePool(std::size_t capacity = 50, std::uint64_t seed = 0)
      : capacity_(capacity), rng_(make_rng(seed, 0x9001)) {}

  TensorImage<Scalar> query(const TensorImage<Scalar>& img) {
    if (capacity_ == 0) return img;
    if (stored_.size() < capacity_) {
      stored_.push_back(img);
      return img;
    }
    if (coin_flip(rng_)) return img;
    const std::size_t i = uniform_index(rng_, stored_.size());
    TensorImage<Scalar> previous = std::move(stored_[i]);
    stored_[i] = img;
    return previous;
  }

  std::size_t capacity() const { return capacity_; }
  const std::vector<TensorImage<Scalar>>& stored() const { return stored_; }
  const Rng& rng() const { return rng_; }

  // Checkpoint restore.
  void restore(std::vector<TensorImage<Scalar>> stored, Rng rng) {
    stored_ = std::move(stored);
    rng_ = rng;
  }

 private:
  std::size_t capacity_;
  std::vector<TensorImage<Scalar>> stored_;
  Rng rng_;
};

}  // namespace shanshui::nn
