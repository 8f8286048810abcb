#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "towl/data.hpp"
#include "towl/openworld.hpp"
#include "towl/unroll.hpp"

namespace towl {

/// Everything needed to reproduce a trained model's predictions. Graph
/// operators are not stored; they are rebuilt from the data (kind and k are
/// recorded per modality). Layout: docs/checkpoint-format.md.
struct Checkpoint {
  UnrolledModel model;
  std::vector<std::size_t> knn_k;  // per modality, 0 when no graph
  std::optional<AgentThreshold> agent;
};

inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws ParseError (with line number) on malformed input.
Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<checkpoint>");
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const UnrolledModel& model, std::optional<AgentThreshold> agent);

/// Attaches graph operators for every modality whose layers use one: the
/// dataset's graph when it matches the recorded kind and k, else a graph
/// rebuilt from that modality's features.
void attach_graphs(Checkpoint& ckpt, const OpenWorldDataset& ds);

}  // namespace towl
