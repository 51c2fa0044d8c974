import pytest

from cachesnap.vm import (
    HUGE_PAGE_FRAMES,
    PAGE_SIZE,
    FramePool,
    OutOfMemory,
    PageFault,
    SegmentationFault,
    VMA,
    VirtualMemory,
    default_layout,
    parse_layout,
    render_layout,
)


def fresh_vm(seed=0, frames=4096, huge_blocks=2):
    return VirtualMemory(FramePool(frames=frames, seed=seed, huge_blocks=huge_blocks))


def heap_base(vm, pid):
    return vm.find_region(pid, "heap").start


def test_demand_paging_idempotent():
    vm = fresh_vm()
    vm.register_process(1)
    base = heap_base(vm, 1)
    frame = vm.map_page(1, base)
    paddr1, faulted1 = vm.touch(1, base + 5)
    assert not faulted1 and paddr1 == (frame << 12) | 5
    paddr2, faulted2 = vm.touch(1, base + PAGE_SIZE)  # next page: new frame
    assert faulted2 and (paddr2 >> 12) != frame


def test_consecutive_vpages_get_scattered_frames():
    vm = fresh_vm(seed=123)
    vm.register_process(1)
    base = heap_base(vm, 1)
    frames = [vm.map_page(1, base + i * PAGE_SIZE) for i in range(256)]
    consecutive = sum(1 for a, b in zip(frames, frames[1:]) if b == a + 1)
    assert consecutive < 8  # shuffled pool: runs of consecutive frames are rare
    assert len(set(frames)) == len(frames)  # no double-booking


def test_huge_region_contiguous_and_aligned():
    vm = fresh_vm()
    vm.register_process(1)
    vma = vm.add_region(1, "[anon]", HUGE_PAGE_FRAMES * PAGE_SIZE, huge=True)
    assert vma.start % (HUGE_PAGE_FRAMES * PAGE_SIZE) == 0
    frames = [vm.translate(1, vma.start + i * PAGE_SIZE) >> 12 for i in range(HUGE_PAGE_FRAMES)]
    assert frames == list(range(frames[0], frames[0] + HUGE_PAGE_FRAMES))
    assert frames[0] % HUGE_PAGE_FRAMES == 0  # cache-size aligned physical base


def test_translate_roundtrip_and_shadow_walk():
    vm = fresh_vm(seed=9)
    vm.register_process(3)
    base = heap_base(vm, 3)
    shadow = {}
    for i in range(64):
        vaddr = base + i * PAGE_SIZE + (i * 7 % PAGE_SIZE)
        paddr, _ = vm.touch(3, vaddr)
        assert paddr & (PAGE_SIZE - 1) == vaddr & (PAGE_SIZE - 1)
        shadow[vaddr >> 12] = paddr >> 12
    for vpn, frame in shadow.items():
        assert vm.translate(3, vpn << 12) == frame << 12


def test_translate_unmapped_page_faults():
    vm = fresh_vm()
    vm.register_process(1)
    with pytest.raises(PageFault):
        vm.translate(1, heap_base(vm, 1))


def test_segfault_outside_all_vmas():
    vm = fresh_vm()
    vm.register_process(1)
    with pytest.raises(SegmentationFault):
        vm.map_page(1, 0xDEAD0000000)
    with pytest.raises(SegmentationFault):
        vm.translate(1, 0xDEAD0000000)


def test_out_of_memory():
    vm = VirtualMemory(FramePool(frames=512, seed=0, huge_blocks=1))
    vm.register_process(1)
    with pytest.raises(OutOfMemory):
        for i in range(600):
            vm.map_page(1, heap_base(vm, 1) + i * PAGE_SIZE)
    with pytest.raises(OutOfMemory):
        vm.add_region(1, "[anon]", 2 * HUGE_PAGE_FRAMES * PAGE_SIZE, huge=True)


def test_resolve_frame_single_shared_and_never_mapped():
    vm = fresh_vm()
    vm.register_process(1)
    vm.register_process(2)
    base = heap_base(vm, 1)
    frame = vm.map_page(1, base)
    got = vm.resolve_frame(frame)
    assert len(got) == 1
    pid, vaddr, vma = got[0]
    assert (pid, vaddr, vma.name) == (1, base, "heap")

    # explicit sharing: both mappings come back, ordered by (pid, vaddr)
    vm.map_shared(2, heap_base(vm, 2) + PAGE_SIZE, frame)
    got = vm.resolve_frame(frame)
    assert [(p, v) for p, v, _ in got] == sorted((p, v) for p, v, _ in got)
    assert {p for p, _, _ in got} == {1, 2}

    assert vm.resolve_frame(123456) == []


def test_resolve_contains_every_mapping():
    vm = fresh_vm(seed=4)
    vm.register_process(7)
    base = heap_base(vm, 7)
    for i in range(32):
        frame = vm.map_page(7, base + i * PAGE_SIZE)
        assert (7, base + i * PAGE_SIZE) in [(p, v) for p, v, _ in vm.resolve_frame(frame)]
    vm.check_consistency()


def test_record_layout_static_and_after_mmap():
    vm = fresh_vm()
    vm.register_process(1)
    before = vm.record_layout(1)
    assert before == vm.record_layout(1)
    assert [v.name for v in before] == ["text", "heap", "glibc", "stack"]
    assert all(a.end <= b.start for a, b in zip(before, before[1:]))
    vm.add_region(1, "[anon]", 64 * PAGE_SIZE)
    after = vm.record_layout(1)
    assert len(after) == len(before) + 1
    assert any(v.name == "[anon]" for v in after)
    assert before == [v for v in after if v.name != "[anon]"]


def test_layout_render_parse_roundtrip():
    vmas = default_layout() + [VMA("[anon]", 0x7F0000000000, 0x7F0000100000)]
    text = render_layout(vmas)
    assert parse_layout(text) == vmas
    line = text.splitlines()[0]
    assert line.endswith(" r-xp text") and "-" in line


def test_vma_validation():
    with pytest.raises(ValueError):
        VMA("x", 0x2000, 0x1000)
    with pytest.raises(ValueError):
        VMA("x", 0x100, 0x2000)  # unaligned start


def test_pid_rules():
    vm = fresh_vm()
    with pytest.raises(ValueError):
        vm.register_process(0)
    vm.register_process(5)
    with pytest.raises(ValueError):
        vm.register_process(5)
    with pytest.raises(KeyError):
        vm.map_page(99, 0x1000)
