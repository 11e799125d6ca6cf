#pragma once

#include <stdexcept>
#include <string>

namespace langsg {

// Malformed input documents (scene metadata, configs, vocabularies).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data that parses but breaks a model invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary container problems: magic, version, truncation, dimension.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses/gradients and other failures inside an optimisation step.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace langsg
