#pragma once

#include "polyreg/datagen/generator.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace polyreg::cli {

/// Runs one command line (args[0] is the program name). Returns the process
/// exit code: 0 success, 1 runtime failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Flat "key=value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Inserts "--key value" for every config entry whose flag is absent from
/// `args`, right after the subcommand, so explicit flags take precedence.
std::vector<std::string> merge_config(const std::vector<std::string>& args, std::size_t subcommand_index,
                                      const std::map<std::string, std::string>& config);

/// JSON pair files written by `gen` and read by `fit` (full double precision).
void write_pair(const std::string& path, const ModelSpec& spec, const DomainGrid& grid, const TrainingPair& pair);
/// Binary pair file: magic "PRPAIR01", u32 spec-id length, spec id, u32 H,
/// W, R, M, then little-endian float32 input[R*N], target[R*N],
/// theta_true[M] and the outlier mask as 0/1 [N].
void write_pair_binary(const std::string& path, const ModelSpec& spec, const DomainGrid& grid, const TrainingPair& pair);
struct PairFile {
  ModelSpec spec = ModelSpec::scalar();
  DomainGrid grid = DomainGrid::line(2);
  TrainingPair pair;
  bool has_target = false;
};
/// Reads either format, detected by the binary magic.
PairFile read_pair(const std::string& path);

}  // namespace polyreg::cli
