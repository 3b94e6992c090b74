#pragma once

#include <stdexcept>
#include <string>

namespace metaprompt {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A forward primitive produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Second-order differentiation was requested through a graph that was not
/// retained during the first backward pass.
class HigherOrderGraphAbsent : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace metaprompt
