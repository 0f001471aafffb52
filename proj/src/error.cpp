#include "dragkit/error.hpp"

namespace dragkit {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidInput: return "invalid input";
        case ErrorKind::DegenerateMask: return "degenerate mask";
        case ErrorKind::InvalidStep: return "invalid step";
        case ErrorKind::Configuration: return "configuration error";
        case ErrorKind::CosineUndefined: return "cosine undefined";
        case ErrorKind::TrainingDiverged: return "training diverged";
        case ErrorKind::OptimizationDiverged: return "optimization diverged";
        case ErrorKind::Io: return "io error";
    }
    return "error";
}

}  // namespace dragkit
