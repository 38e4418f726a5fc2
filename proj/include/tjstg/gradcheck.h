#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tjstg/network.h"

namespace tjstg {

struct GradCheckCase {
  std::string loss_name;  // "L_qa" | "L_csl" | "L_s" | "L"
  ad::GradCheckReport report;
};

// Central finite-difference check of every named parameter group on a small
// model (d=8, T=3, h=w=2, N=4, C=3) for each loss term and their weighted
// total. inject_fault threads the loss through an identity whose backward
// rule flips the sign, for exercising the failure path.
std::vector<GradCheckCase> gradcheck_tiny_model(double eps = 1e-5,
                                                std::uint64_t seed = 11,
                                                bool inject_fault = false);

// Identity in value whose backward rule is deliberately sign-flipped.
// Test fixture only.
ad::Var faulty_identity(ad::Var x);

}  // namespace tjstg
