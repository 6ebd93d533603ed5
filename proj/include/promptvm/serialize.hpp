// Copyright (C) 2026 The promptvm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "json.hpp"
#include "promptvm/executor_builder.hpp"

namespace promptvm {

using Json = nlohmann::json;

// Doubles are stored as C99 hex-float strings so that files round-trip
// bit-exactly. Readers also accept plain JSON numbers.
std::string hex_double(double v);
double parse_double(const Json& j);

Json to_json(const Vector& v);
Json to_json(const Matrix& m);
Json to_json(const SparseMatrix& m);
Json to_json(const MlpShapeClass& s);
Json to_json(const SlotLayout& s);
Json to_json(const RegisterLayout& r);
Json to_json(const BudgetPlan& p);
Json to_json(const ReluMlp& mlp);
Json to_json(const ExecutorParams& p);
Json to_json(const PromptProgram& p);

Vector vector_from_json(const Json& j);
Matrix matrix_from_json(const Json& j);
SparseMatrix sparse_from_json(const Json& j);
MlpShapeClass shape_from_json(const Json& j);
SlotLayout slot_layout_from_json(const Json& j);
BudgetPlan plan_from_json(const Json& j);
ReluMlp mlp_from_json(const Json& j);
ExecutorParams executor_from_json(const Json& j);
PromptProgram prompt_from_json(const Json& j);

/// Executor file: the parameters plus the shape class and plan they were
/// built for.
struct ExecutorArtifact {
  MlpShapeClass shape;
  BudgetPlan plan;
  ExecutorParams params;
};

Json artifact_to_json(const ExecutorArtifact& a);
ExecutorArtifact artifact_from_json(const Json& j);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
Json load_json(const std::string& path);
// Deterministic text: sorted keys, trailing newline. indent < 0 is compact.
std::string dump_json(const Json& j, int indent = 2);
void save_json(const std::string& path, const Json& j, int indent = 2);

}  // namespace promptvm
