// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace promptvm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedShape : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  CapacityError(std::size_t required, std::size_t available)
      : Error("capacity exceeded: " + std::to_string(required) +
              " parameter slots required, " + std::to_string(available) +
              " available"),
        required_(required),
        available_(available) {}

  std::size_t required() const { return required_; }
  std::size_t available() const { return available_; }

 private:
  std::size_t required_;
  std::size_t available_;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class BuildError : public Error {
 public:
  using Error::Error;
};

/// Raised by the planner. `constraint` names the requirement that could not be met.
class InfeasiblePlan : public Error {
 public:
  InfeasiblePlan(std::string constraint, const std::string& detail)
      : Error("infeasible plan (" + constraint + "): " + detail),
        constraint_(std::move(constraint)) {}

  const std::string& constraint() const { return constraint_; }

 private:
  std::string constraint_;
};

class InvariantBreach : public Error {
 public:
  InvariantBreach(std::string invariant, std::size_t block, const std::string& detail)
      : Error(invariant + " breach at block " + std::to_string(block) + ": " + detail),
        invariant_(std::move(invariant)),
        block_(block) {}

  const std::string& invariant() const { return invariant_; }
  std::size_t block() const { return block_; }

 private:
  std::string invariant_;
  std::size_t block_;
};

}  // namespace promptvm
