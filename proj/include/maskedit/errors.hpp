#pragma once

#include <stdexcept>
#include <string>

namespace maskedit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-positive or otherwise unusable dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Tensor/image shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double det) : Error(what), det_(det) {}
  double determinant() const noexcept { return det_; }

 private:
  double det_;
};

// Malformed checkpoint, manifest, or image file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Structurally valid inputs that disagree with each other (e.g. K mismatch).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// A required backend (segmenter, perceptual network) is not reachable.
class UnavailableError : public Error {
 public:
  using Error::Error;
};

class NotSupportedError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace maskedit
