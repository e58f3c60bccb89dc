#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "colonformer/nn.hpp"

namespace colonformer {

/// Flat parameter-name -> tensor map. Names are hierarchical dotted paths,
/// e.g. `encoder.stage1.block0.attn.q.weight`; Linear weights are stored
/// (in_features, out_features), convolutions (out, in/groups, kh, kw).
using StateDict = std::map<std::string, Tensor>;

StateDict state_dict(Module& m);

/// Binary format: magic "CFCKPT01", u64 entry count, then per entry (sorted by
/// name): u32 name length, name bytes, u32 ndim, u64 dims, f64 payload.
/// Round-trips are bit-exact.
void save_checkpoint(const std::filesystem::path& path, const StateDict& state);
StateDict load_checkpoint(const std::filesystem::path& path);

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> missing_in_file;  // model parameters the file lacks
    std::vector<std::string> unused_in_file;   // file entries no parameter matched
    bool complete() const { return missing_in_file.empty() && unused_in_file.empty(); }
    std::string summary() const;
};

/// Copies matching entries into the module's parameters. Shape conflicts are
/// always errors. With strict=true any missing/unused name is an error too
/// (checkpoint/variant mismatch); strict=false supports partial (backbone-only)
/// files and reports what was skipped.
LoadReport apply_state(Module& m, const StateDict& state, bool strict);

}  // namespace colonformer
