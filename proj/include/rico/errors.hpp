#pragma once

#include <stdexcept>
#include <string>

namespace rico {

// Invalid caller-supplied input (bad token id, empty span, unknown doc id, ...).
struct input_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A numeric pass produced a non-finite value; the message names layer and position.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class format_issue {
    bad_magic,
    bad_version,
    truncated,
    fingerprint_mismatch,
    malformed,
};

// Structured failure while reading/writing checkpoint, index or corpus files.
struct format_error : std::runtime_error {
    format_issue issue;
    format_error(format_issue i, const std::string& msg) : std::runtime_error(msg), issue(i) {}
};

} // namespace rico
