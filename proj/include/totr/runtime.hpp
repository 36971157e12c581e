#pragma once

namespace totr {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// No-op off glibc.
void configure_allocator();

}  // namespace totr
