// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "promptvm/linalg.hpp"
#include "promptvm/routing.hpp"
#include "promptvm/target_mlp.hpp"

namespace promptvm {

/// Slot assignment of a prompt. Unit records occupy slots [0, capacity), the
/// output-bias record sits at slot `capacity`, the null slot right after it,
/// and any remaining rows are zero padding.
struct SlotLayout {
  std::size_t total_slots = 0;
  std::size_t unit_capacity = 0;
  std::size_t bias_slot = 0;
  std::size_t null_slot = 0;
  std::vector<std::size_t> param_slots;
  std::vector<std::size_t> work_slots;
  std::size_t key_dim = 0;  // key block is [0, key_dim)
  std::size_t value_offset = 0;
  std::size_t value_dim = 0;
  std::size_t model_width = 0;

  std::size_t used_slots() const { return unit_capacity + 2; }
  void validate() const;
  bool operator==(const SlotLayout& other) const = default;
};

SlotLayout make_slot_layout(std::size_t input_dim, std::size_t unit_capacity,
                            std::size_t total_slots, std::size_t model_width);

struct RecordLabel {
  enum class Kind { Unit, OutputBias, Null };
  Kind kind = Kind::Unit;
  std::size_t unit = 0;

  bool operator==(const RecordLabel& other) const = default;
};

struct PayloadRecord {
  RecordLabel label;
  Vector payload;  // (W_r, b_r, a_r) for a unit, (c) for the bias record
};

struct AddressEntry {
  RecordLabel label;
  std::size_t slot = 0;

  bool operator==(const AddressEntry& other) const = default;
};

struct PromptProgram {
  Matrix matrix;  // total_slots x model_width
  SlotLayout layout;
  std::vector<AddressEntry> address_map;
  MlpShapeClass source_shape;
  double value_bound = 0.0;

  std::size_t slot_of(const RecordLabel& label) const;
};

std::vector<PayloadRecord> chunk_mlp(const ReluMlp& mlp);

PromptProgram encode_mlp(const ReluMlp& mlp, const SlotLayout& layout, const KeyCodebook& codebook,
                         double domain_radius = 1.0);

ReluMlp decode_prompt(const PromptProgram& program, const KeyCodebook& codebook);

}  // namespace promptvm
