#pragma once

#include "rimesa/key.hpp"
#include "rimesa/manifold.hpp"
#include "rimesa/values.hpp"
#include "rimesa/noise.hpp"
#include "rimesa/kernel.hpp"
#include "rimesa/factors.hpp"
#include "rimesa/solver.hpp"
#include "rimesa/consensus.hpp"
#include "rimesa/agent.hpp"
#include "rimesa/netsim.hpp"
#include "rimesa/dataset.hpp"
#include "rimesa/eval.hpp"
#include "rimesa/harness.hpp"
