"""Compiled fixed-step integrator for the point-mass tensegrity model.

Forces are in g*mm/s^2 (micro-newtons) so that mm, g and s stay consistent.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def advance(x, v, t0, nsteps, dt, mass, strut_nodes, strut_len, spring_nodes, spring_k,
            spring_l0, spring_c, unilateral, motor_strut, motor_amp, motor_pos, omega,
            gravity, ground_z, ground_k, ground_c, mu, fric_iters, noise, noise_every, noise_from):
    """Advance ``x``/``v`` in place by ``nsteps`` steps starting at time ``t0``.

    Nodes touch the ground once their height drops below ``ground_z`` (the
    end-cap radius). Per step: spring, gravity, motor and ground-normal forces; rigid-rod
    forces and Coulomb friction solved together by fixed-point iteration;
    semi-implicit Euler; then projection of rod lengths and rod-axial
    relative velocities.
    """
    nn = x.shape[0]
    ns = strut_nodes.shape[0]
    fb = np.empty_like(x)
    ff = np.zeros_like(x)
    fr = np.zeros_like(x)
    normal = np.zeros(nn)
    n_noise = noise.shape[0]
    for step in range(nsteps):
        t = t0 + step * dt
        for i in range(nn):
            fb[i, 0] = 0.0
            fb[i, 1] = 0.0
            fb[i, 2] = -mass[i] * gravity
            ff[i, 0] = 0.0
            ff[i, 1] = 0.0
        if n_noise > 0 and step + noise_from >= 0:
            k = (step + noise_from) // noise_every
            if k < n_noise:
                for i in range(nn):
                    for d in range(3):
                        fb[i, d] += noise[k, i, d]

        for s in range(spring_nodes.shape[0]):
            i = spring_nodes[s, 0]
            j = spring_nodes[s, 1]
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            L = np.sqrt(dx * dx + dy * dy + dz * dz)
            nx = dx / L
            ny = dy / L
            nz = dz / L
            stretch = L - spring_l0[s]
            if unilateral and stretch < 0.0:
                continue
            rv = (v[j, 0] - v[i, 0]) * nx + (v[j, 1] - v[i, 1]) * ny + (v[j, 2] - v[i, 2]) * nz
            fs = spring_k[s] * stretch + spring_c[s] * rv
            fb[i, 0] += fs * nx
            fb[i, 1] += fs * ny
            fb[i, 2] += fs * nz
            fb[j, 0] -= fs * nx
            fb[j, 1] -= fs * ny
            fb[j, 2] -= fs * nz

        for m in range(motor_strut.shape[0]):
            w = omega[m]
            if w == 0.0:
                continue
            s = motor_strut[m]
            i = strut_nodes[s, 0]
            j = strut_nodes[s, 1]
            ax = x[j, 0] - x[i, 0]
            ay = x[j, 1] - x[i, 1]
            az = x[j, 2] - x[i, 2]
            L = np.sqrt(ax * ax + ay * ay + az * az)
            ax /= L
            ay /= L
            az /= L
            # cross-section basis: e1 horizontal (z cross axis), e2 = axis cross e1
            h = np.sqrt(ax * ax + ay * ay)
            if h < 1e-12:
                e1x, e1y = 1.0, 0.0
            else:
                e1x, e1y = -ay / h, ax / h
            e2x = -az * e1y
            e2y = az * e1x
            e2z = ax * e1y - ay * e1x
            F = motor_amp[m] * w * w
            c = np.cos(w * t)
            sn = np.sin(w * t)
            Fx = F * (c * e1x + sn * e2x)
            Fy = F * (c * e1y + sn * e2y)
            Fz = F * (sn * e2z)
            a = motor_pos[m]
            fb[i, 0] += (1.0 - a) * Fx
            fb[i, 1] += (1.0 - a) * Fy
            fb[i, 2] += (1.0 - a) * Fz
            fb[j, 0] += a * Fx
            fb[j, 1] += a * Fy
            fb[j, 2] += a * Fz

        for i in range(nn):
            normal[i] = 0.0
            if x[i, 2] < ground_z:
                n_ = ground_k * (ground_z - x[i, 2]) - ground_c * v[i, 2]
                if n_ > 0.0:
                    normal[i] = n_
                    fb[i, 2] += n_

        for it in range(fric_iters + 1):
            for s in range(ns):
                i = strut_nodes[s, 0]
                j = strut_nodes[s, 1]
                dx = x[j, 0] - x[i, 0]
                dy = x[j, 1] - x[i, 1]
                dz = x[j, 2] - x[i, 2]
                L = np.sqrt(dx * dx + dy * dy + dz * dz)
                nx = dx / L
                ny = dy / L
                nz = dz / L
                wi = 1.0 / mass[i]
                wj = 1.0 / mass[j]
                rvx = v[j, 0] - v[i, 0]
                rvy = v[j, 1] - v[i, 1]
                rvz = v[j, 2] - v[i, 2]
                ra = rvx * nx + rvy * ny + rvz * nz
                vperp2 = rvx * rvx + rvy * rvy + rvz * rvz - ra * ra
                arel = (((fb[j, 0] + ff[j, 0]) * wj - (fb[i, 0] + ff[i, 0]) * wi) * nx
                        + ((fb[j, 1] + ff[j, 1]) * wj - (fb[i, 1] + ff[i, 1]) * wi) * ny
                        + (fb[j, 2] * wj - fb[i, 2] * wi) * nz)
                lam = (-vperp2 / L - arel) / (wi + wj)
                fr[i, 0] = -lam * nx
                fr[i, 1] = -lam * ny
                fr[i, 2] = -lam * nz
                fr[j, 0] = lam * nx
                fr[j, 1] = lam * ny
                fr[j, 2] = lam * nz
            if it == fric_iters:
                break
            for i in range(nn):
                if normal[i] > 0.0:
                    im = 1.0 / mass[i]
                    vx = v[i, 0] + dt * (fb[i, 0] + fr[i, 0]) * im
                    vy = v[i, 1] + dt * (fb[i, 1] + fr[i, 1]) * im
                    vt = np.sqrt(vx * vx + vy * vy)
                    cap = mu * normal[i] * dt * im
                    if vt <= cap:
                        ff[i, 0] = -vx * mass[i] / dt
                        ff[i, 1] = -vy * mass[i] / dt
                    else:
                        ff[i, 0] = -mu * normal[i] * vx / vt
                        ff[i, 1] = -mu * normal[i] * vy / vt

        for i in range(nn):
            im = 1.0 / mass[i]
            v[i, 0] += dt * (fb[i, 0] + ff[i, 0] + fr[i, 0]) * im
            v[i, 1] += dt * (fb[i, 1] + ff[i, 1] + fr[i, 1]) * im
            v[i, 2] += dt * (fb[i, 2] + fr[i, 2]) * im
            x[i, 0] += dt * v[i, 0]
            x[i, 1] += dt * v[i, 1]
            x[i, 2] += dt * v[i, 2]

        for s in range(ns):
            i = strut_nodes[s, 0]
            j = strut_nodes[s, 1]
            wi = 1.0 / mass[i]
            wj = 1.0 / mass[j]
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            L = np.sqrt(dx * dx + dy * dy + dz * dz)
            corr = (L - strut_len[s]) / (L * (wi + wj))
            x[i, 0] += wi * corr * dx
            x[i, 1] += wi * corr * dy
            x[i, 2] += wi * corr * dz
            x[j, 0] -= wj * corr * dx
            x[j, 1] -= wj * corr * dy
            x[j, 2] -= wj * corr * dz
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            L = np.sqrt(dx * dx + dy * dy + dz * dz)
            nx = dx / L
            ny = dy / L
            nz = dz / L
            ra = ((v[j, 0] - v[i, 0]) * nx + (v[j, 1] - v[i, 1]) * ny
                  + (v[j, 2] - v[i, 2]) * nz) / (wi + wj)
            v[i, 0] += wi * ra * nx
            v[i, 1] += wi * ra * ny
            v[i, 2] += wi * ra * nz
            v[j, 0] -= wj * ra * nx
            v[j, 1] -= wj * ra * ny
            v[j, 2] -= wj * ra * nz
