#pragma once

#include <stdexcept>
#include <string>

namespace shanshui {

// Unreadable or unwritable files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bytes that do not decode: bad images, corrupted checkpoints, bad manifests.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Arguments outside an operation's domain.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor or image dimensions that an operation cannot accept.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A non-finite value surfaced during training. `term()` names the loss term.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(std::string term)
      : std::runtime_error("non-finite loss in term '" + term + "'"),
        term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace shanshui
