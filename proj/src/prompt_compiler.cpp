// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptvm/prompt_compiler.hpp"

#include <string>

#include "promptvm/error.hpp"

namespace promptvm {

void SlotLayout::validate() const {
  if (unit_capacity == 0) throw InvalidArgument("slot layout: no unit slots");
  if (bias_slot != unit_capacity || null_slot != unit_capacity + 1)
    throw InvalidArgument("slot layout: bias and null slots must follow the unit slots");
  if (null_slot >= total_slots)
    throw InvalidArgument("slot layout: " + std::to_string(used_slots()) + " slots needed, " +
                          std::to_string(total_slots) + " available");
  if (param_slots.size() != unit_capacity + 1)
    throw InvalidArgument("slot layout: parameter slot list has wrong length");
  for (std::size_t i = 0; i < param_slots.size(); ++i)
    if (param_slots[i] != i) throw InvalidArgument("slot layout: parameter slots must be a prefix");
  for (std::size_t s : work_slots)
    if (s <= null_slot || s >= total_slots) throw InvalidArgument("slot layout: work slot overlaps");
  if (key_dim < total_slots) throw InvalidArgument("slot layout: key block too small for basis keys");
  if (value_offset < key_dim) throw InvalidArgument("slot layout: value block overlaps key block");
  if (value_offset + value_dim > model_width)
    throw InvalidArgument("slot layout: key and value blocks exceed model width");
}

SlotLayout make_slot_layout(std::size_t input_dim, std::size_t unit_capacity,
                            std::size_t total_slots, std::size_t model_width) {
  SlotLayout s;
  s.total_slots = total_slots;
  s.unit_capacity = unit_capacity;
  s.bias_slot = unit_capacity;
  s.null_slot = unit_capacity + 1;
  for (std::size_t i = 0; i <= unit_capacity; ++i) s.param_slots.push_back(i);
  s.key_dim = total_slots;
  s.value_offset = total_slots;
  s.value_dim = input_dim + 2;
  s.model_width = model_width;
  s.validate();
  return s;
}

std::size_t PromptProgram::slot_of(const RecordLabel& label) const {
  for (const auto& e : address_map)
    if (e.label == label) return e.slot;
  throw InvalidArgument("prompt: label not in address map");
}

std::vector<PayloadRecord> chunk_mlp(const ReluMlp& mlp) {
  if (mlp.depth() != 3) throw UnsupportedShape("chunk_mlp: only one-hidden-layer networks (depth 3)");
  const std::size_t d = mlp.input_dim(), m = mlp.hidden_width();
  std::vector<PayloadRecord> out;
  out.reserve(m + 1);
  for (std::size_t r = 0; r < m; ++r) {
    Vector p(d + 2);
    for (std::size_t i = 0; i < d; ++i) p[i] = mlp.w()(r, i);
    p[d] = mlp.b()[r];
    p[d + 1] = mlp.a(r);
    out.push_back({{RecordLabel::Kind::Unit, r}, std::move(p)});
  }
  out.push_back({{RecordLabel::Kind::OutputBias, 0}, Vector{mlp.c()}});
  return out;
}

namespace {

void write_key(Matrix& p, std::size_t slot, const KeyCodebook& codebook) {
  const Vector& k = codebook.key(slot);
  for (std::size_t c = 0; c < k.size(); ++c) p(slot, c) = k[c];
}

void check_codebook(const SlotLayout& layout, const KeyCodebook& codebook) {
  if (codebook.key_dim() != layout.key_dim || codebook.size() < layout.total_slots)
    throw InvalidArgument("codebook does not cover the slot layout");
}

}  // namespace

PromptProgram encode_mlp(const ReluMlp& mlp, const SlotLayout& layout, const KeyCodebook& codebook,
                         double domain_radius) {
  layout.validate();
  check_codebook(layout, codebook);
  auto records = chunk_mlp(mlp);
  const std::size_t units = records.size() - 1;
  if (units > layout.unit_capacity) throw CapacityError(units + 1, layout.unit_capacity + 1);
  if (mlp.input_dim() + 2 > layout.value_dim)
    throw UnsupportedShape("encode: payload of length " + std::to_string(mlp.input_dim() + 2) +
                           " does not fit value block of " + std::to_string(layout.value_dim));

  PromptProgram prog;
  prog.matrix = Matrix(layout.total_slots, layout.model_width);
  prog.layout = layout;
  for (std::size_t s = 0; s < layout.used_slots(); ++s) write_key(prog.matrix, s, codebook);
  for (std::size_t r = 0; r < layout.unit_capacity; ++r) {
    prog.address_map.push_back({{RecordLabel::Kind::Unit, r}, r});
    if (r < units) {
      const auto& p = records[r].payload;
      for (std::size_t k = 0; k < p.size(); ++k) prog.matrix(r, layout.value_offset + k) = p[k];
    }
  }
  prog.address_map.push_back({{RecordLabel::Kind::OutputBias, 0}, layout.bias_slot});
  prog.matrix(layout.bias_slot, layout.value_offset) = records.back().payload[0];
  prog.address_map.push_back({{RecordLabel::Kind::Null, 0}, layout.null_slot});

  prog.source_shape = MlpShapeClass{mlp.input_dim(), units, 3, mlp.param_bound(), domain_radius};
  prog.value_bound = mlp.param_bound();
  return prog;
}

ReluMlp decode_prompt(const PromptProgram& prog, const KeyCodebook& codebook) {
  const SlotLayout& layout = prog.layout;
  layout.validate();
  check_codebook(layout, codebook);
  const Matrix& p = prog.matrix;
  if (p.rows() != layout.total_slots || p.cols() != layout.model_width)
    throw IntegrityError("prompt matrix does not match its slot layout");
  for (std::size_t s = 0; s < layout.total_slots; ++s) {
    const bool used = s < layout.used_slots();
    for (std::size_t c = 0; c < layout.key_dim; ++c) {
      const double expect = used ? codebook.key(s)[c] : 0.0;
      if (p(s, c) != expect)
        throw IntegrityError("key block of slot " + std::to_string(s) + " is corrupted at coordinate " +
                             std::to_string(c));
    }
    for (std::size_t c = layout.key_dim; c < layout.model_width; ++c) {
      const bool payload = c >= layout.value_offset && c < layout.value_offset + layout.value_dim;
      if (p(s, c) != 0.0 && (!used || !payload || s == layout.null_slot))
        throw IntegrityError("slot " + std::to_string(s) + " has a stray entry at coordinate " +
                             std::to_string(c));
    }
  }

  const std::size_t d = prog.source_shape.input_dim, m = prog.source_shape.hidden_width;
  if (m == 0 || m > layout.unit_capacity || d + 2 > layout.value_dim)
    throw IntegrityError("source shape does not fit the slot layout");
  const std::size_t v0 = layout.value_offset;
  Matrix w(m, d);
  Vector b(m), a(m);
  for (std::size_t r = 0; r < layout.unit_capacity; ++r) {
    const std::size_t s = prog.slot_of({RecordLabel::Kind::Unit, r});
    for (std::size_t k = 0; k < layout.value_dim; ++k) {
      const double v = p(s, v0 + k);
      if (r >= m || k >= d + 2) {
        if (v != 0.0) throw IntegrityError("padding unit slot " + std::to_string(s) + " is not zero");
        continue;
      }
      if (k < d) w(r, k) = v;
      else if (k == d) b[r] = v;
      else a[r] = v;
    }
  }
  const std::size_t bs = prog.slot_of({RecordLabel::Kind::OutputBias, 0});
  for (std::size_t k = 1; k < layout.value_dim; ++k)
    if (p(bs, v0 + k) != 0.0) throw IntegrityError("bias record carries extra entries");
  return one_hidden_layer(w, b, a, p(bs, v0), prog.source_shape.param_bound);
}

}  // namespace promptvm
