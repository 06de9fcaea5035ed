#pragma once

#include <stdexcept>
#include <string>

namespace s2osc {

// Base error; `stage` names the pipeline stage for structured CLI reports.
class Error : public std::runtime_error {
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

class ConsistencyError : public Error {
public:
    explicit ConsistencyError(const std::string& what) : Error("consistency", what) {}
};

class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& what) : Error("protocol", what) {}
};

class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& what) : Error("parameter", what) {}
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error("input", what) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error("state", what) {}
};

}  // namespace s2osc
