#pragma once

#include <stdexcept>
#include <string>

namespace s2d {

enum class ErrorKind {
    config,       // invalid configuration or sizes
    shape,        // tensor dimension mismatch
    vocab,        // token id or token text outside the vocabulary
    catalog,      // unknown finding / region
    grammar,      // phrase grammar cannot render an entity
    pool,         // not enough demonstrations to sample from
    selection,    // no alternative study to draw a reference from
    context,      // context branches do not match the stage
    asymmetry,    // auxiliary context used at inference
    empty_loss,   // all targets are padding
    empty_context,
    registry,     // unknown connector name
    data,         // corpus content violates an invariant
    checkpoint,   // corrupt or mismatched checkpoint
    numeric,      // NaN / inf during training
    io,
    usage,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace s2d
