#pragma once

#include <stdexcept>
#include <string>

namespace spinecade {

// Error identities raised across the pipeline. The CLI and the tests match on
// the code, never on message text.
enum class Errc {
  missing_file,
  malformed_header,
  size_mismatch,
  io_error,
  malformed_row,
  out_of_bounds,
  unknown_label,
  too_small,
  shape_mismatch,
  dim_mismatch,
  empty_mask,
  empty_edge_map,
  no_positives,
  single_class_dataset,
  version_mismatch,
  checksum_mismatch,
  degenerate_labels,
  spec_too_small,
  config_invalid,
  missing_upstream_artifact,
  run_locked,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace spinecade
