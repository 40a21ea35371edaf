#include "hdm/autograd.hpp"

namespace hdm {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidDimension: return "invalid dimension";
    case ErrorKind::kInvalidTransform: return "invalid transform";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kInvalidRate: return "invalid rate";
    case ErrorKind::kInvalidConfig: return "invalid config";
    case ErrorKind::kInvalidGuidance: return "invalid guidance";
    case ErrorKind::kInvariant: return "internal invariant violation";
    case ErrorKind::kTrainingDivergence: return "training divergence";
    case ErrorKind::kSamplerDivergence: return "sampler divergence";
    case ErrorKind::kInvalidImage: return "invalid image";
    case ErrorKind::kCorpus: return "corpus error";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kIntegrity: return "integrity error";
    case ErrorKind::kUsage: return "usage error";
  }
  return "error";
}

}  // namespace hdm
