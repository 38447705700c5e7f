#pragma once

#include <stdexcept>
#include <string>

namespace bnn {

/// Base class for all library errors.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

struct invalid_parameter : error {
    explicit invalid_parameter(const std::string& msg) : error(msg) {}
};

struct invalid_shape : error {
    explicit invalid_shape(const std::string& msg) : error(msg) {}
};

struct invalid_state : error {
    explicit invalid_state(const std::string& msg) : error(msg) {}
};

struct invalid_label : error {
    explicit invalid_label(const std::string& msg) : error(msg) {}
};

struct config_error : error {
    explicit config_error(const std::string& msg) : error(msg) {}
};

struct io_error : error {
    explicit io_error(const std::string& msg) : error(msg) {}
};

struct degenerate_data : error {
    explicit degenerate_data(const std::string& msg) : error(msg) {}
};

}  // namespace bnn
