#include "spinecade/error.hpp"

namespace spinecade {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::missing_file: return "MissingFile";
    case Errc::malformed_header: return "MalformedHeader";
    case Errc::size_mismatch: return "SizeMismatch";
    case Errc::io_error: return "IoError";
    case Errc::malformed_row: return "MalformedRow";
    case Errc::out_of_bounds: return "OutOfBounds";
    case Errc::unknown_label: return "UnknownLabel";
    case Errc::too_small: return "TooSmall";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::dim_mismatch: return "DimMismatch";
    case Errc::empty_mask: return "EmptyMask";
    case Errc::empty_edge_map: return "EmptyEdgeMap";
    case Errc::no_positives: return "NoPositives";
    case Errc::single_class_dataset: return "SingleClassDataset";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::checksum_mismatch: return "ChecksumMismatch";
    case Errc::degenerate_labels: return "DegenerateLabels";
    case Errc::spec_too_small: return "SpecTooSmall";
    case Errc::config_invalid: return "ConfigInvalid";
    case Errc::missing_upstream_artifact: return "MissingUpstreamArtifact";
    case Errc::run_locked: return "RunLocked";
  }
  return "UnknownError";
}

}  // namespace spinecade
